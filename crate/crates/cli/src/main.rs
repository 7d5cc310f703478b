fn main() {
    std::process::exit(scopelens_cli::run(std::env::args_os().collect()));
}
