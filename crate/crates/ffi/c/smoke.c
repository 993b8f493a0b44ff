#include <stdio.h>
#include "sde_recover.h"
int main(void) {
    SdrTrajectory *t = NULL; SdrFit *fit = NULL;
    if (sdr_simulate(SDR_PROCESS_OU, 5.0, 1.0, 1.0, 0.001, 300, 7, &t) != SDR_STATUS_OK) { fprintf(stderr, "%s\n", sdr_last_error()); return 1; }
    SdrStatus s = sdr_fit(t, SDR_KERNEL_MATERN52, SDR_KERNEL_MATERN52, SDR_OPTIMIZER_NEWTON_ARMIJO, &fit);
    if (s != SDR_STATUS_OK) { fprintf(stderr, "%d %s\n", s, sdr_last_error()); return 1; }
    double x[3] = {0.5, 1.0, 1.5}, f[3], sg[3];
    s = sdr_fit_predict(fit, x, 3, f, sg);
    for (int i = 0; i < 3; i++) printf("x=%.2f f=%.3f sigma=%.3f\n", x[i], f[i], sg[i]);
    SdrTrajectory *bad = NULL;
    s = sdr_simulate(SDR_PROCESS_GBM, 1e100, 1.0, 1.0, 1.0, 10, 0, &bad);
    printf("status %d: %s\n", s, sdr_last_error());
    sdr_fit_free(fit); sdr_trajectory_free(t);
    return 0;
}
