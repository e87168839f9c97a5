macro_rules! example {
    ($module:ident, $file:literal, $test:ident) => {
        #[path = $file]
        mod $module;

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(projector, "../examples/projector.rs", projector_runs);
example!(semi_convergence, "../examples/semi_convergence.rs", semi_convergence_runs);
example!(fit_to_noise, "../examples/fit_to_noise.rs", fit_to_noise_runs);
example!(upre_gcv, "../examples/upre_gcv.rs", upre_gcv_runs);
example!(ncp_rule, "../examples/ncp_rule.rs", ncp_rule_runs);
example!(trace_estimators, "../examples/trace_estimators.rs", trace_estimators_runs);
example!(sirt_poisson, "../examples/sirt_poisson.rs", sirt_poisson_runs);
example!(parameter_grid, "../examples/parameter_grid.rs", parameter_grid_runs);
