fn main() {
    std::process::exit(cherrynet::cli::main_with_args(std::env::args_os()));
}
