fn main() {
    std::process::exit(mixssm_cli::run(std::env::args_os()));
}
