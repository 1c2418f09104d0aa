fn main() {
    std::process::exit(vgcn::cli::main_with_args(std::env::args_os()));
}
