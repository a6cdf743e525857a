fn main() {
    std::process::exit(fedskip_cli::main_with_args(std::env::args_os()));
}
