fn main() {
    // Link the system OpenBLAS (bundles LAPACK) for the dense factorizations
    // in the samplers. Falls back to the generic search path if the Debian
    // pthread layout is absent.
    let debian_dir = "/usr/lib/x86_64-linux-gnu/openblas-pthread";
    if std::path::Path::new(debian_dir).exists() {
        println!("cargo:rustc-link-search=native={debian_dir}");
    }
    println!("cargo:rustc-link-lib=dylib=openblas");
}
