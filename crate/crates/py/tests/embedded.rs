use exon_detect::exon_detect;
use pyo3::prelude::*;

#[test]
fn module_scores_from_python() {
    pyo3::append_to_inittab!(exon_detect);
    Python::attach(|py| {
        py.run(
            cr#"
import math
import exon_detect as ex
docs = ex.generate(seed=1, docs_per_class=5, length=20)
b = ex.score_document(docs[0], ex.DetectorConfig(theta=3.0, repair_term=False))
assert b.n_exonic == 0
a0 = sum(-t.lm for t in docs[0].tokens)
b0 = sum(-math.exp(t.lm) * t.lx for t in docs[0].tokens)
assert abs(b.score - a0 / b0) < 1e-12 * (1 + abs(b.score))
assert ex.decide(b.score, b.score) == "ai"
try:
    ex.DetectorConfig(layers="sideways:2")
    raise AssertionError("accepted a bad layer selection")
except ValueError:
    pass
"#,
            None,
            None,
        )
        .unwrap();
    });
}
