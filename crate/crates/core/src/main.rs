fn main() {
    std::process::exit(capmsize::cli::main());
}
