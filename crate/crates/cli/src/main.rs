fn main() {
    std::process::exit(reward_lens_cli::run(std::env::args_os()));
}
