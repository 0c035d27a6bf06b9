fn main() {
    std::process::exit(season::cli::main_with_args(std::env::args_os()));
}
