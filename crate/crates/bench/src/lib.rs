//! Fixtures shared by the benchmarks.

use vfidca::applications::Instance;
use vfidca::data::{gen_elastic_net, gen_svm, split_shuffle};

/// Elastic net with `p` features and 100 / 20 / 50 samples.
pub fn elastic_net(p: usize, seed: u64) -> Instance {
    let d = gen_elastic_net(100, 20, 50, p, seed).expect("valid sizes");
    Instance::elastic_net(&d.train, &d.val, &d.test).expect("valid splits")
}

/// Three-fold SVM on `n` noisy samples with 10 features.
pub fn svm(n: usize, seed: u64) -> Instance {
    let (data, _) = gen_svm(n, 10, 5, 0.1, seed).expect("valid sizes");
    let cv = 3 * (n / 6);
    let parts = split_shuffle(&data, &[cv, n - cv], seed).expect("valid split");
    Instance::svm_crossval(&parts[0], &parts[1], 3, 1e-6, 10.0).expect("valid instance")
}
