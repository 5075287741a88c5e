fn main() {
    std::process::exit(bsm::cli::main());
}
