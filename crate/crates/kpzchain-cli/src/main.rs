fn main() {
    println!("kpzchain (under construction)");
}
