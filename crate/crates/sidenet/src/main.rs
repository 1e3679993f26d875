fn main() {
    std::process::exit(sidenet::cli::run_from_env());
}
