fn main() {
    let start = std::time::Instant::now();
    let checks = segkit::selftest::run_all();
    let mut failed = 0;
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {} - {}", c.name, c.detail);
        if !c.passed { failed += 1; }
    }
    println!("{} checks, {} failed, {:.2}s", checks.len(), failed, start.elapsed().as_secs_f64());
}
