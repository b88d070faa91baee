fn main() {
    std::process::exit(scorecal_cli::run(std::env::args_os()));
}
