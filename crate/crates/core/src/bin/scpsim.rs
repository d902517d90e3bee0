fn main() {
    std::process::exit(scpsim::cli::run());
}
