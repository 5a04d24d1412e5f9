fn main() {
    std::process::exit(agepop::cli::main());
}
