# Tests del laboratorio_aeail
