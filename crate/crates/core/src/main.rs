fn main() {
    std::process::exit(xcmine::cli::run(std::env::args_os()));
}
