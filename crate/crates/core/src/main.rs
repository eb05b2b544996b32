fn main() {
    std::process::exit(occlift::cli::run(std::env::args_os()));
}
