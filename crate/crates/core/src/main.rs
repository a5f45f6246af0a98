fn main() {
    std::process::exit(lsfsac::harness::run_cli(std::env::args_os()));
}
