use super::{NumError, ParamId, ParamStore, Tape, Var};

/// Compare reverse-mode gradients against central differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |numeric|)` over the
/// checked coordinates. At most `coords_per_param` evenly spaced
/// coordinates of each parameter are perturbed.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    h: f64,
    coords_per_param: usize,
    f: F,
) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    assert!((1e-6..=1e-4).contains(&h), "finite-difference step {h} outside [1e-6, 1e-4]");
    assert!(coords_per_param > 0);

    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.scalar(loss)?;
    let grads = tape.backward(loss);

    let eval = |store: &ParamStore| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        tape.scalar(loss)
    };

    let mut worst: f64 = 0.0;
    for &id in params {
        let analytic = grads.params().iter().find(|(pid, _)| *pid == id).map(|(_, g)| g.clone());
        let numel = store.value(id).numel();
        let picks: Vec<usize> = if numel <= coords_per_param {
            (0..numel).collect()
        } else {
            (0..coords_per_param).map(|i| i * numel / coords_per_param).collect()
        };
        for i in picks {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store);
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
