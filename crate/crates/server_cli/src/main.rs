fn main() {
    std::process::exit(l2r_server::cli::run(std::env::args_os()));
}
