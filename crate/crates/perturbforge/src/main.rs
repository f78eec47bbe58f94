fn main() {
    std::process::exit(perturbforge::cli::run());
}
