fn main() {
    std::process::exit(sgdm_harness::cli::run(std::env::args_os()));
}
