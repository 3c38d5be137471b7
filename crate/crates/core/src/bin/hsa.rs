fn main() {
    std::process::exit(hsa_core::cli::main());
}
