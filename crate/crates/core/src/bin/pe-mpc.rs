fn main() {
    std::process::exit(pe_mpc::cli::main_with_args(std::env::args_os()));
}
