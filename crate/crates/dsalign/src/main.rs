fn main() {
    std::process::exit(dsalign::cli::run(std::env::args_os()));
}
