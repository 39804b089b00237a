fn main() {
    std::process::exit(mxmem::cli::main());
}
