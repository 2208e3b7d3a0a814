#[cfg(feature = "parallel")]
use std::sync::Arc;

/// How batch work (samples, sweep cells, curve steps) is fanned out.
///
/// Output order always matches input order, so reductions performed on the
/// returned vector are identical across variants.
#[derive(Clone)]
pub enum Exec {
    Sequential,
    /// rayon's global pool.
    #[cfg(feature = "parallel")]
    Parallel,
    #[cfg(feature = "parallel")]
    Pool(Arc<rayon::ThreadPool>),
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Exec::Parallel;
        #[cfg(not(feature = "parallel"))]
        Exec::Sequential
    }
}

impl Exec {
    /// Executor with a fixed worker count. `0` means "use every core".
    /// Without the `parallel` feature this is always sequential.
    pub fn with_workers(workers: usize) -> Exec {
        #[cfg(feature = "parallel")]
        {
            if workers == 1 {
                return Exec::Sequential;
            }
            if workers == 0 {
                return Exec::Parallel;
            }
            match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                Ok(pool) => Exec::Pool(Arc::new(pool)),
                Err(_) => Exec::Parallel,
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Exec::Sequential
        }
    }

    pub fn is_parallel(&self) -> bool {
        !matches!(self, Exec::Sequential)
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(feature = "parallel")]
            Exec::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().map(f).collect())
            }
        }
    }

    /// Like [`Exec::map`] but short-circuits on the first error (in input order
    /// for the sequential path; any error for the parallel path).
    pub fn try_map<T, R, E, F>(&self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(feature = "parallel")]
            Exec::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().map(f).collect())
            }
        }
    }
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exec::Sequential => f.write_str("Sequential"),
            #[cfg(feature = "parallel")]
            Exec::Parallel => f.write_str("Parallel"),
            #[cfg(feature = "parallel")]
            Exec::Pool(pool) => write!(f, "Pool({})", pool.current_num_threads()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u64> = (0..257).collect();
        let seq = Exec::Sequential.map(&xs, |x| x * x);
        let par = Exec::default().map(&xs, |x| x * x);
        let pooled = Exec::with_workers(3).map(&xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, pooled);
    }

    #[test]
    fn try_map_reports_error() {
        let xs = [1, 2, 3];
        let r: Result<Vec<i32>, String> = Exec::default().try_map(&xs, |&x| {
            if x == 2 {
                Err("two".to_string())
            } else {
                Ok(x)
            }
        });
        assert_eq!(r.unwrap_err(), "two");
    }
}
