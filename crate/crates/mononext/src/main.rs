fn main() {
    let code = mononext::pipeline::cli::run_cli(std::env::args_os());
    std::process::exit(code);
}
