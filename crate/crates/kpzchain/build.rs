fn main() {
    // Link the system OpenBLAS (provides BLAS + LAPACK in one shared object).
    println!("cargo:rustc-link-lib=dylib=openblas");
    if cfg!(target_os = "linux") {
        println!("cargo:rustc-link-search=native=/usr/lib/x86_64-linux-gnu");
    }
}
