fn main() {
    std::process::exit(gittins_sched_cli::main_with_args(std::env::args_os()));
}
