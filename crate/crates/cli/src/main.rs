fn main() {
    std::process::exit(llda_cli::run_cli(std::env::args_os()));
}
