fn main() {
    std::process::exit(pbinv::cli::main_with_args(std::env::args_os()));
}
