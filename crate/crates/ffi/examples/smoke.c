/* Minimal C consumer: builds a Gaussian oracle and runs one detection. */
#include <stdio.h>
#include "autoddpm.h"

#define H 16
#define W 16

int main(void) {
    AutoddpmSchedule *schedule = NULL;
    AutoddpmDenoiser *denoiser = NULL;
    AutoddpmDetection *detection = NULL;
    double mu0[H * W], image[H * W], final_map[H * W];
    for (int i = 0; i < H * W; i++) {
        mu0[i] = 0.5;
        image[i] = (i / W > 5 && i / W < 9 && i % W > 5 && i % W < 9) ? 1.0 : 0.5;
    }
    if (autoddpm_schedule_new(1000, 1e-4, 0.02, &schedule) != AUTODDPM_STATUS_OK) goto fail;
    if (autoddpm_denoiser_analytic_new(mu0, H, W, 0.01, schedule, &denoiser) != AUTODDPM_STATUS_OK) goto fail;
    AutoddpmPipelineConfig cfg;
    autoddpm_pipeline_config_default(&cfg);
    cfg.t_mask = 100;
    cfg.t_stitch = 20;
    cfg.n_resample = 2;
    if (autoddpm_detect(denoiser, schedule, &cfg, image, H, W, 7, &detection) != AUTODDPM_STATUS_OK) goto fail;
    if (autoddpm_detection_get(detection, AUTODDPM_DETECTION_FIELD_FINAL_MAP, final_map, H * W) != AUTODDPM_STATUS_OK) goto fail;
    double inside = final_map[7 * W + 7], outside = final_map[1 * W + 1];
    printf("autoddpm %s: final map inside %.4f, outside %.4f\n", autoddpm_version(), inside, outside);
    autoddpm_detection_free(detection);
    autoddpm_denoiser_free(denoiser);
    autoddpm_schedule_free(schedule);
    return inside > outside ? 0 : 1;
fail:
    fprintf(stderr, "error: %s\n", autoddpm_last_error());
    return 2;
}
