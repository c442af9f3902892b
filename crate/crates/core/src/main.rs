fn main() {
    std::process::exit(shortfall_core::cli::main());
}
