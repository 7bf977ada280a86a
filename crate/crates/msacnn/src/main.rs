fn main() {
    std::process::exit(msacnn::cli::run(std::env::args_os()));
}
