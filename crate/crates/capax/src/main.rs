fn main() {
    std::process::exit(capax::cli::run(std::env::args_os()));
}
