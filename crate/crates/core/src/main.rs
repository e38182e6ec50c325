fn main() {
    std::process::exit(opportune::cli::main());
}
