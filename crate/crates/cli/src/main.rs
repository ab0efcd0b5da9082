fn main() {
    std::process::exit(cmmd_cli::run(std::env::args_os()));
}
