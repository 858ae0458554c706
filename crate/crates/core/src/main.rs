fn main() {
    std::process::exit(landscape_lab::cli::main());
}
