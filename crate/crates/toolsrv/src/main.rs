fn main() {
    std::process::exit(raw2raw_toolsrv::cli::run(std::env::args_os()));
}
