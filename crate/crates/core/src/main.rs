fn main() {
    std::process::exit(csde::cli::run());
}
