fn main() {
    // Placeholder while the core library is under construction.
    eprintln!("subfbm CLI: not yet wired");
    std::process::exit(2);
}
