/* Minimal C caller: parse a config, solve, evaluate, print norms.
 *
 * Build (from the workspace root, after `cargo build --release`):
 *   cc crates/ffi/examples/smoke.c \
 *      -Icrates/ffi/include \
 *      target/release/libmicromorph_ffi.a \
 *      -lpthread -ldl -lm -o smoke && ./smoke
 */
#include <stdio.h>

#include "micromorph.h"

int main(void) {
    MmConfig *cfg = NULL;
    MmStatus status = mm_config_parse_json("{\"N\": 4, \"mms_preset\": \"bump\"}", &cfg);
    if (status != MM_OK) {
        fprintf(stderr, "config: %s\n", mm_last_error_message());
        return 1;
    }

    MmSolution *sol = NULL;
    status = mm_solve(cfg, &sol);
    if (status != MM_OK) {
        fprintf(stderr, "solve: %s\n", mm_last_error_message());
        mm_config_free(cfg);
        return 1;
    }

    uint64_t iterations = 0;
    double residual = 0.0;
    mm_solution_solver_stats(sol, &iterations, &residual);

    double state[12];
    mm_solution_evaluate(sol, 0.1, -0.2, 0.3, state);

    double norms[4];
    mm_solution_norms(sol, norms);

    printf("iterations=%llu residual=%.3e\n", (unsigned long long)iterations, residual);
    printf("u(0.1,-0.2,0.3) = (%.6f, %.6f, %.6f)\n", state[0], state[1], state[2]);
    printf("|u|=%.6f |grad u|=%.6f |P|=%.6f |Curl P|=%.6f\n",
           norms[0], norms[1], norms[2], norms[3]);

    mm_solution_free(sol);
    mm_config_free(cfg);
    return 0;
}
