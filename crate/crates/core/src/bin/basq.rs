fn main() -> std::process::ExitCode {
    basq::bench::cli::main()
}
