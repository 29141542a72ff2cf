def __getattr__(name: str):
    import sami_broker._main as module

    return getattr(module, name)
