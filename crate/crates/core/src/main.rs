fn main() {
    std::process::exit(segmark::cli::run());
}
