fn main() {
    std::process::exit(dery_core::cli::main());
}
