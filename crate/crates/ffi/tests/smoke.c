#include <stdio.h>
#include <string.h>
#include "asktmk.h"

static const char *MODEL_PATH;

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc(n + 1);
    if (fread(buf, 1, n, f) != (size_t)n) { fclose(f); free(buf); return NULL; }
    buf[n] = 0;
    fclose(f);
    return buf;
}

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    MODEL_PATH = argv[1];
    char *json = slurp(MODEL_PATH);
    if (!json) return 3;

    AsktmkEngine *engine = NULL;
    if (asktmk_engine_new(json, NULL, &engine) != ASKTMK_STATUS_OK) {
        fprintf(stderr, "engine_new: %s\n", asktmk_last_error());
        return 4;
    }
    char *out = NULL;
    AsktmkStatus st = asktmk_ask(engine, "How can I best utilise the output of the system in VERA?", 0, &out);
    if (st != ASKTMK_STATUS_OK || strstr(out, "\"multimodels\"") == NULL) return 5;
    asktmk_string_free(out);

    if (asktmk_ask(engine, "", 0, &out) != ASKTMK_STATUS_PIPELINE_ERROR) return 6;
    printf("%s\n", asktmk_last_error());

    asktmk_engine_free(engine);
    free(json);
    return 0;
}
