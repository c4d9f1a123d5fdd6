fn main() {
    std::process::exit(corrrm::cli::run());
}
