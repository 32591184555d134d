fn main() {
    std::process::exit(hmm_memory::cli::run(std::env::args_os()));
}
