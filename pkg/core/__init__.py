# Paquete core: configuración, logging, errores, semillas y orquestación del pipeline
