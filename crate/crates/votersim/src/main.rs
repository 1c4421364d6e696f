fn main() -> std::process::ExitCode {
    votersim::commands::main()
}
