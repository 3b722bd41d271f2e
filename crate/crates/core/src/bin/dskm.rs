fn main() {
    std::process::exit(dskm::cli::main());
}
