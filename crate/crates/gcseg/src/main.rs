fn main() {
    std::process::exit(gcseg::cli::run());
}
