fn main() {
    let code = hgkt::cli::cmd_dispatch(std::env::args_os());
    std::process::exit(code);
}
