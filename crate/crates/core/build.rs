// LAPACK comes from the system libopenblas. rustc-link-lib propagates to
// dependent crates, so the FFI layer and test binaries resolve the same
// symbols without their own link configuration.
fn main() {
    println!("cargo:rustc-link-lib=dylib=openblas");
}
