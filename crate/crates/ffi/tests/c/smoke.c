#include <math.h>
#include <stdio.h>
#include <string.h>

#include "poca.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "check failed line %d: %s\n", __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    double p[4] = {0.25, 0.25, 0.25, 0.25};
    double h = 0.0;
    CHECK(poca_entropy(p, 4, &h) == POCA_STATUS_OK);
    CHECK(fabs(h - 2.0) < 1e-12);

    double bad[2] = {0.7, 0.7};
    CHECK(poca_entropy(bad, 2, &h) == POCA_STATUS_INVALID_ARGUMENT);
    CHECK(poca_last_error_message() != NULL);

    PocaSimConfig *cfg = NULL;
    CHECK(poca_sim_config_new(8, 4, 200, 7, POCA_PHI_TENT, 1.0, &cfg) == POCA_STATUS_OK);
    CHECK(poca_sim_config_set_threads(cfg, 1) == POCA_STATUS_OK);
    PocaSimSummary *summary = NULL;
    CHECK(poca_sim_run(cfg, &summary) == POCA_STATUS_OK);
    uint64_t per_unit = 1, norm = 1;
    CHECK(poca_sim_summary_violations(summary, &per_unit, &norm) == POCA_STATUS_OK);
    CHECK(per_unit == 0 && norm == 0);
    char *json = NULL;
    CHECK(poca_sim_summary_to_json(summary, &json) == POCA_STATUS_OK);
    CHECK(strstr(json, "\"trials\":200") != NULL);
    poca_string_free(json);
    poca_sim_summary_free(summary);
    poca_sim_config_free(cfg);

    const char *refs[1] = {"a cat sat"};
    double meteor = 0.0;
    CHECK(poca_meteor_exact("a cat sat", refs, 1, &meteor) == POCA_STATUS_OK);
    CHECK(fabs(meteor - 0.981481) < 1e-6);

    char *prompt = NULL;
    CHECK(poca_render_vqa_prompt("A red cup.", "What color is the cup?", &prompt) == POCA_STATUS_OK);
    CHECK(strstr(prompt, "Image Caption: A red cup.") != NULL);
    poca_string_free(prompt);
    puts("ok");
    return 0;
}
